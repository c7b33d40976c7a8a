//! Closed-form proximal maps and the Moreau–Yosida envelope.
//!
//! All maps act componentwise. `prox_{s g}(z) = argmin_u g(u) + ‖u − z‖² / (2s)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonsmooth part `g` of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxFunction {
    Zero,
    /// `w ‖x‖₁`
    L1 {
        weight: f64,
    },
    /// `(μ/2) ‖x‖²`
    SqL2 {
        weight: f64,
    },
    /// Indicator of the non-negative orthant.
    NonNegIndicator,
    /// `w ‖x‖₁ + (μ/2) ‖x‖²`
    L1PlusSqL2 {
        l1: f64,
        sq: f64,
    },
}

impl ProxFunction {
    /// Per-coordinate points where the gradient of the Moreau envelope `g_γ` is not differentiable.
    pub fn moreau_kinks(&self, gamma: f64) -> Vec<f64> {
        match *self {
            ProxFunction::Zero | ProxFunction::SqL2 { .. } => Vec::new(),
            ProxFunction::L1 { weight: w } | ProxFunction::L1PlusSqL2 { l1: w, .. } if w > 0.0 => {
                vec![-gamma * w, gamma * w]
            }
            ProxFunction::L1 { .. } | ProxFunction::L1PlusSqL2 { .. } => Vec::new(),
            ProxFunction::NonNegIndicator => vec![0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        let valid = match *self {
            ProxFunction::Zero | ProxFunction::NonNegIndicator => true,
            ProxFunction::L1 { weight } | ProxFunction::SqL2 { weight } => ok(weight),
            ProxFunction::L1PlusSqL2 { l1, sq } => ok(l1) && ok(sq),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "prox function weights must be finite and >= 0: {self:?}"
            )))
        }
    }

    /// Value of `g`; `+∞` outside the domain of an indicator.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match *self {
            ProxFunction::Zero => 0.0,
            ProxFunction::L1 { weight } => weight * x.lp_norm(1),
            ProxFunction::SqL2 { weight } => 0.5 * weight * x.norm_squared(),
            ProxFunction::NonNegIndicator => {
                if x.iter().all(|&v| v >= 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::L1PlusSqL2 { l1, sq } => l1 * x.lp_norm(1) + 0.5 * sq * x.norm_squared(),
        }
    }

    /// `prox_{step·g}(z)`.
    pub fn prox(&self, z: &DVector<f64>, step: f64) -> DVector<f64> {
        match *self {
            ProxFunction::Zero => z.clone(),
            ProxFunction::L1 { weight } => prox_l1(z, step * weight),
            ProxFunction::SqL2 { weight } => z / (1.0 + step * weight),
            ProxFunction::NonNegIndicator => prox_nonneg(z),
            // shrink, then scale
            ProxFunction::L1PlusSqL2 { l1, sq } => prox_l1(z, step * l1) / (1.0 + step * sq),
        }
    }

    /// Diagonal of an element of the generalized Jacobian of `prox_{step·g}` at `z`.
    pub fn prox_jacobian_diag(&self, z: &DVector<f64>, step: f64) -> DVector<f64> {
        let active = |v: f64, threshold: f64| if v.abs() > threshold { 1.0 } else { 0.0 };
        match *self {
            ProxFunction::Zero => DVector::from_element(z.len(), 1.0),
            ProxFunction::L1 { weight } => z.map(|v| active(v, step * weight)),
            ProxFunction::SqL2 { weight } => DVector::from_element(z.len(), 1.0 / (1.0 + step * weight)),
            ProxFunction::NonNegIndicator => z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            ProxFunction::L1PlusSqL2 { l1, sq } => z.map(|v| active(v, step * l1) / (1.0 + step * sq)),
        }
    }

    /// Weight of the quadratic when `g` is `(μ/2)‖x‖²` (or zero), `None` otherwise.
    ///
    /// Subproblems with a quadratic `g` have a closed-form minimizer.
    pub fn quadratic_weight(&self) -> Option<f64> {
        match *self {
            ProxFunction::Zero => Some(0.0),
            ProxFunction::SqL2 { weight } => Some(weight),
            _ => None,
        }
    }

    /// Whether `prox(−z) = −prox(z)`.
    pub fn is_odd(&self) -> bool {
        !matches!(self, ProxFunction::NonNegIndicator)
    }
}

/// Soft thresholding: `sign(z_i) · max(|z_i| − threshold, 0)`.
pub fn prox_l1(z: &DVector<f64>, threshold: f64) -> DVector<f64> {
    debug_assert!(threshold >= 0.0);
    z.map(|v| v.signum() * (v.abs() - threshold).max(0.0))
}

/// Projection onto the non-negative orthant.
pub fn prox_nonneg(z: &DVector<f64>) -> DVector<f64> {
    z.map(|v| v.max(0.0))
}

/// Smoothing parameter of the Moreau–Yosida envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoreauParams {
    pub gamma: f64,
}

impl MoreauParams {
    pub const DEFAULT_GAMMA: f64 = 1e-3;

    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(Self { gamma })
        } else {
            Err(Error::Config(format!("Moreau parameter must be > 0, got {gamma}")))
        }
    }
}

impl Default for MoreauParams {
    fn default() -> Self {
        Self {
            gamma: Self::DEFAULT_GAMMA,
        }
    }
}

/// Gradient of the Moreau envelope, `(x − prox_{γg}(x)) / γ`. It is `(1/γ)`-Lipschitz.
pub fn moreau_grad(g: &ProxFunction, params: MoreauParams, x: &DVector<f64>) -> DVector<f64> {
    let p = g.prox(x, params.gamma);
    (x - p) / params.gamma
}

/// Value of the Moreau envelope, `g(p) + ‖x − p‖² / (2γ)` with `p = prox_{γg}(x)`.
pub fn moreau_value(g: &ProxFunction, params: MoreauParams, x: &DVector<f64>) -> f64 {
    let p = g.prox(x, params.gamma);
    g.value(&p) + (x - &p).norm_squared() / (2.0 * params.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn envelope_gradient_is_linear_between_kinks() {
        let params = MoreauParams::new(0.1).unwrap();
        for g in [
            ProxFunction::L1 { weight: 2.0 },
            ProxFunction::L1PlusSqL2 { l1: 1.0, sq: 3.0 },
            ProxFunction::NonNegIndicator,
            ProxFunction::SqL2 { weight: 1.0 },
        ] {
            let mut points = g.moreau_kinks(0.1);
            points.insert(0, -5.0);
            points.push(5.0);
            for w in points.windows(2) {
                // the gradient restricted to each piece is affine: midpoint value = mean of neighbours
                let (a, b) = (w[0] + 1e-9, w[1] - 1e-9);
                let mid = 0.5 * (a + b);
                let grad = |x: f64| moreau_grad(&g, params, &scalar(x))[0];
                assert!(
                    (grad(mid) - 0.5 * (grad(a) + grad(b))).abs() < 1e-7,
                    "{g:?} on [{a}, {b}]"
                );
            }
        }
    }

    /// Minimizer of a convex scalar function by bisection on its right derivative.
    fn argmin_by_bisection(right_derivative: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if right_derivative(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Golden-section minimum value of a convex scalar function on `[lo, hi]`.
    fn golden_min(phi: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - r * (hi - lo);
        let mut d = lo + r * (hi - lo);
        for _ in 0..300 {
            if phi(c) < phi(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - r * (hi - lo);
            d = lo + r * (hi - lo);
        }
        phi(0.5 * (lo + hi))
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(prox_l1(&scalar(2.0), 0.5)[0], 1.5);
        assert_eq!(prox_l1(&scalar(0.3), 0.5)[0], 0.0);
        assert_eq!(prox_l1(&scalar(-2.0), 0.5)[0], -1.5);
    }

    #[test]
    fn nonneg_projection_examples() {
        let z = DVector::from_vec(vec![-1.0, 2.0]);
        assert_eq!(prox_nonneg(&z), DVector::from_vec(vec![0.0, 2.0]));
        let feasible = DVector::from_vec(vec![0.0, 0.5, 3.0]);
        assert_eq!(prox_nonneg(&feasible), feasible);
    }

    #[test]
    fn moreau_grad_examples() {
        let g = ProxFunction::L1 { weight: 1.0 };
        let p = MoreauParams::new(1.0).unwrap();
        assert_eq!(moreau_grad(&g, p, &scalar(2.0))[0], 1.0);
        assert_eq!(moreau_grad(&g, p, &scalar(0.25))[0], 0.25);
        for g in [
            ProxFunction::Zero,
            ProxFunction::L1 { weight: 2.0 },
            ProxFunction::SqL2 { weight: 3.0 },
            ProxFunction::L1PlusSqL2 { l1: 1.0, sq: 0.5 },
        ] {
            assert_eq!(moreau_grad(&g, p, &DVector::zeros(3)), DVector::zeros(3));
        }
    }

    #[test]
    fn indicator_value_is_infinite_outside_orthant() {
        let g = ProxFunction::NonNegIndicator;
        assert_eq!(g.value(&DVector::from_vec(vec![1.0, -1e-12])), f64::INFINITY);
        assert_eq!(g.value(&DVector::from_vec(vec![1.0, 0.0])), 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(MoreauParams::new(0.0).is_err());
        assert!(ProxFunction::L1 { weight: -1.0 }.validate().is_err());
        assert!(ProxFunction::L1PlusSqL2 { l1: 1.0, sq: f64::NAN }.validate().is_err());
    }

    fn any_prox() -> impl Strategy<Value = ProxFunction> {
        prop_oneof![
            Just(ProxFunction::Zero),
            (0.0..3.0f64).prop_map(|weight| ProxFunction::L1 { weight }),
            (0.0..3.0f64).prop_map(|weight| ProxFunction::SqL2 { weight }),
            Just(ProxFunction::NonNegIndicator),
            (0.0..3.0f64, 0.0..3.0f64).prop_map(|(l1, sq)| ProxFunction::L1PlusSqL2 { l1, sq }),
        ]
    }

    fn vec_of(len: usize) -> impl Strategy<Value = DVector<f64>> {
        proptest::collection::vec(-5.0..5.0f64, len).prop_map(DVector::from_vec)
    }

    proptest! {
        #[test]
        fn prox_is_nonexpansive(g in any_prox(), s in 0.01..4.0f64, x in vec_of(6), y in vec_of(6)) {
            let d = (g.prox(&x, s) - g.prox(&y, s)).norm();
            prop_assert!(d <= (x - y).norm() * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn prox_satisfies_subgradient_inequality(
            g in any_prox(), s in 0.01..4.0f64, x in vec_of(5), w in vec_of(5)
        ) {
            // (x - p)/s ∈ ∂g(p)  ⇔  g(w) ≥ g(p) + ⟨(x - p)/s, w - p⟩ for all w
            let p = g.prox(&x, s);
            let sub = (&x - &p) / s;
            let w = if matches!(g, ProxFunction::NonNegIndicator) { prox_nonneg(&w) } else { w };
            let lower = g.value(&p) + sub.dot(&(&w - &p));
            prop_assert!(g.value(&w) >= lower - 1e-9 * (1.0 + lower.abs()));
        }

        #[test]
        fn nonneg_projection_is_idempotent(z in vec_of(8)) {
            let once = prox_nonneg(&z);
            prop_assert_eq!(prox_nonneg(&once), once);
        }

        #[test]
        fn moreau_grad_is_inverse_gamma_lipschitz(
            g in any_prox(), gamma in 0.001..2.0f64, x in vec_of(4), y in vec_of(4)
        ) {
            let p = MoreauParams::new(gamma).unwrap();
            let d = (moreau_grad(&g, p, &x) - moreau_grad(&g, p, &y)).norm();
            prop_assert!(d <= (x - y).norm() / gamma * (1.0 + 1e-10) + 1e-12);
        }

        #[test]
        fn envelope_matches_direct_minimization(
            g in any_prox(), gamma in 0.05..2.0f64, x in -4.0..4.0f64
        ) {
            let p = MoreauParams::new(gamma).unwrap();
            let direct = golden_min(
                |u| g.value(&scalar(u)) + (x - u).powi(2) / (2.0 * gamma),
                x - 20.0,
                x + 20.0,
            );
            let closed = moreau_value(&g, p, &scalar(x));
            prop_assert!((closed - direct).abs() <= 1e-8, "closed={closed} direct={direct}");
        }

        #[test]
        fn composite_prox_matches_one_dimensional_oracle(
            w in 0.0..3.0f64, mu in 0.0..3.0f64, s in 0.05..3.0f64, z in -6.0..6.0f64
        ) {
            let g = ProxFunction::L1PlusSqL2 { l1: w, sq: mu };
            let closed = g.prox(&scalar(z), s)[0];
            let right = |u: f64| w * if u >= 0.0 { 1.0 } else { -1.0 } + mu * u + (u - z) / s;
            let oracle = argmin_by_bisection(right, -50.0, 50.0);
            prop_assert!((closed - oracle).abs() <= 1e-8, "closed={closed} oracle={oracle}");
            let phi = |u: f64| w * u.abs() + 0.5 * mu * u * u + (u - z).powi(2) / (2.0 * s);
            let golden = golden_min(phi, -50.0, 50.0);
            prop_assert!(phi(closed) <= golden + 1e-10);
        }
    }
}
