//! Inertial accelerated primal-dual methods for
//!
//! ```text
//!   min  f(x) + g(x)   s.t.  A x = b
//! ```
//!
//! with `f` convex and `L_f`-smooth and `g` convex with a cheap proximal map.
//!
//! The crate contains the discrete solver ([`solver`]), the second-order
//! primal-dual dynamics it discretizes ([`dynamics`]), the Lyapunov energies and
//! explicit bound certificates used to check both, and the accelerated
//! proximal-gradient machinery used for subproblems and baselines
//! ([`composite`]).

pub mod composite;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod problem;
pub mod prox;
pub mod schedule;
pub mod solver;
pub mod trace;

pub use composite::{InnerMethod, InnerSolverConfig};
pub use error::{Error, Result};
pub use problem::{CompositeProblem, KktResidual, SaddlePointCertificate, SmoothFunction, SmoothTerm};
pub use prox::{MoreauParams, ProxFunction};
pub use schedule::{ExtrapolationRule, ScalingKind, ScalingPolicy, Schedule};
pub use solver::{IapdaParams, IapdaSolver};
pub use trace::{MetricsTrace, TraceRow};

pub use nalgebra::{DMatrix, DVector};
