//! Extrapolation sequences `t_k` and time-scaling sequences `β_k`.
//!
//! Admissibility conditions checked here, for every `k ≥ 1`:
//!
//! ```text
//!   (q1)  t_{k+1}² − t_{k+1} − t_k² ≤ 0,          t nondecreasing, t_1 ≥ 1
//!   (q0)  β_{k−1} ≤ β_k ≤ t_k² / (t_{k+1}(t_{k+1} − 1)) · β_{k−1}
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// Relative tolerance on the admissibility slacks.
///
/// The Nesterov recurrence is the equality case of (q1), so its slack is pure
/// rounding, which grows like `ε · t_k²`; the tolerance is scaled accordingly.
pub const SLACK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ExtrapolationRule {
    /// `t_1 = 1`, `t_{k+1} = (1 + √(1 + 4 t_k²)) / 2`.
    Nesterov,
    /// `t_k = 1 + (k − 1)/(α − 1)`.
    ChambolleDossal { alpha: f64 },
    /// `t_k = (k − 1)/(α − 1)`, shifted so the first emitted value is the one
    /// at original index `⌊α⌋ + 1` (the first with `t ≥ 1`).
    AttouchCabot { alpha: f64 },
}

impl fmt::Display for ExtrapolationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtrapolationRule::Nesterov => write!(f, "nesterov"),
            ExtrapolationRule::ChambolleDossal { alpha } => write!(f, "chambolle-dossal(alpha={alpha})"),
            ExtrapolationRule::AttouchCabot { alpha } => write!(f, "attouch-cabot(alpha={alpha})"),
        }
    }
}

impl ExtrapolationRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ExtrapolationRule::Nesterov => Ok(()),
            ExtrapolationRule::ChambolleDossal { alpha } | ExtrapolationRule::AttouchCabot { alpha } => {
                if alpha.is_finite() && alpha >= 3.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("{self}: alpha must be >= 3")))
                }
            }
        }
    }

    /// Closed-form `t_k` (1-based) for the rules that have one.
    pub fn closed_form(&self, k: usize) -> Option<f64> {
        let k = k as f64;
        match *self {
            ExtrapolationRule::Nesterov => None,
            ExtrapolationRule::ChambolleDossal { alpha } => Some(1.0 + (k - 1.0) / (alpha - 1.0)),
            ExtrapolationRule::AttouchCabot { alpha } => {
                let shift = alpha.floor();
                Some((k + shift - 1.0) / (alpha - 1.0))
            }
        }
    }

    /// `t_1`.
    pub fn first(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.closed_form(1).unwrap_or(1.0))
    }

    /// `t_{k+1}` from `t_k`.
    pub fn next_t(&self, k: usize, t_k: f64) -> Result<f64> {
        self.validate()?;
        if k == 0 {
            return Err(Error::Config("extrapolation index starts at k = 1".into()));
        }
        if !(t_k >= 1.0) {
            return Err(Error::Config(format!("{self}: t_k must be >= 1, got {t_k}")));
        }
        Ok(match self.closed_form(k + 1) {
            Some(t) => t,
            None => 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt()),
        })
    }

    /// `t_1, …, t_len`.
    pub fn sequence(&self, len: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return Ok(out);
        }
        out.push(self.first()?);
        for k in 1..len {
            out.push(self.next_t(k, out[k - 1])?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// `t_1 ≥ 1`
    Start,
    /// `t` nondecreasing
    Monotone,
    /// `t_{k+1}² − t_{k+1} − t_k² ≤ 0`
    Q1,
    /// `β_{k−1} ≤ β_k`
    BetaMonotone,
    /// `β_k ≤ t_k²/(t_{k+1}(t_{k+1}−1)) β_{k−1}`
    BetaCap,
    /// `inf t_k / k > 0`
    Tau,
}

/// First index at which a schedule fails an admissibility condition.
#[derive(Debug, Clone, Copy, PartialEq, Error, Serialize, Deserialize)]
#[error("schedule violates {condition:?} at k = {k} (slack {slack:.3e})")]
pub struct ScheduleViolation {
    pub condition: Condition,
    pub k: usize,
    pub slack: f64,
}

/// Outcome of a successful [`validate_rule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleCertificate {
    pub horizon: usize,
    /// Largest `t_{k+1}² − t_{k+1} − t_k²` seen.
    pub max_slack: f64,
    /// `min_{k ≤ horizon} t_k / k`.
    pub tau_hat: f64,
}

fn q1_slack(t_k: f64, t_k1: f64) -> f64 {
    t_k1 * t_k1 - t_k1 - t_k * t_k
}

fn check_pair(k: usize, t_k: f64, t_k1: f64) -> std::result::Result<f64, ScheduleViolation> {
    if t_k1 < t_k {
        return Err(ScheduleViolation {
            condition: Condition::Monotone,
            k,
            slack: t_k - t_k1,
        });
    }
    let slack = q1_slack(t_k, t_k1);
    if slack > SLACK_TOL * (t_k1 * t_k1).max(1.0) {
        return Err(ScheduleViolation {
            condition: Condition::Q1,
            k,
            slack,
        });
    }
    Ok(slack)
}

/// Checks (q1), monotonicity and `τ̂ > 0` for an explicit sequence `t_1, …, t_N`.
pub fn validate_sequence(t: &[f64]) -> Result<RuleCertificate> {
    if t.len() < 2 {
        return Err(Error::Config("sequence validation needs at least two terms".into()));
    }
    if !(t[0] >= 1.0) {
        return Err(ScheduleViolation {
            condition: Condition::Start,
            k: 1,
            slack: 1.0 - t[0],
        }
        .into());
    }
    let mut max_slack = f64::NEG_INFINITY;
    let mut tau_hat = f64::INFINITY;
    for k in 1..=t.len() {
        tau_hat = tau_hat.min(t[k - 1] / k as f64);
        if k < t.len() {
            max_slack = max_slack.max(check_pair(k, t[k - 1], t[k])?);
        }
    }
    if !(tau_hat > 0.0) {
        return Err(ScheduleViolation {
            condition: Condition::Tau,
            k: t.len(),
            slack: tau_hat,
        }
        .into());
    }
    Ok(RuleCertificate {
        horizon: t.len(),
        max_slack,
        tau_hat,
    })
}

/// Generates `t_1, …, t_{horizon+1}` and validates (q1) for every `k ≤ horizon`.
pub fn validate_rule(rule: &ExtrapolationRule, horizon: usize) -> Result<RuleCertificate> {
    if horizon < 2 {
        return Err(Error::Config("validation horizon must be >= 2".into()));
    }
    let t = rule.sequence(horizon + 1)?;
    validate_sequence(&t).map(|c| RuleCertificate { horizon, ..c })
}

/// Upper factor `t_k² / (t_{k+1}(t_{k+1} − 1))` of (q0); `+∞` when `t_{k+1} = 1`.
pub fn beta_upper_factor(t_k: f64, t_k1: f64) -> f64 {
    let denom = t_k1 * (t_k1 - 1.0);
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        t_k * t_k / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingKind {
    Constant,
    /// Candidate `β_k = β_{k−1} ((k+1)/k)^p`, i.e. `β_k ∝ (k+1)^p` when never clamped.
    PowerGrowth {
        p: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPolicy {
    pub kind: ScalingKind,
    pub beta0: f64,
}

impl ScalingPolicy {
    pub fn constant(beta0: f64) -> Self {
        Self {
            kind: ScalingKind::Constant,
            beta0,
        }
    }

    pub fn power(beta0: f64, p: f64) -> Self {
        Self {
            kind: ScalingKind::PowerGrowth { p },
            beta0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0.is_finite() && self.beta0 > 0.0) {
            return Err(Error::Config(format!("beta0 must be > 0, got {}", self.beta0)));
        }
        if let ScalingKind::PowerGrowth { p } = self.kind {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Config(format!("power growth exponent must be >= 0, got {p}")));
            }
        }
        Ok(())
    }
}

/// `β_k` from `β_{k−1}`: the policy's candidate clamped into `[β_{k−1}, cap · β_{k−1}]`.
pub fn next_beta(policy: &ScalingPolicy, beta_prev: f64, factor_cap: f64, k: usize) -> f64 {
    let candidate = match policy.kind {
        ScalingKind::Constant => beta_prev,
        ScalingKind::PowerGrowth { p } => {
            let k = k.max(1) as f64;
            beta_prev * ((k + 1.0) / k).powf(p)
        }
    };
    candidate.min(factor_cap * beta_prev).max(beta_prev)
}

/// Joint `(t_k, β_k)` generator positioned at iteration `k`.
///
/// Holds `t_k`, `t_{k+1}`, `β_{k−1}` and `β_k`; every [`advance`](Self::advance)
/// re-checks (q0) and (q1).
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    rule: ExtrapolationRule,
    policy: ScalingPolicy,
    k: usize,
    t_cur: f64,
    t_next: f64,
    beta_prev: f64,
    beta_cur: f64,
}

impl Schedule {
    pub fn new(rule: ExtrapolationRule, policy: ScalingPolicy) -> Result<Self> {
        policy.validate()?;
        let t_cur = rule.first()?;
        if !(t_cur >= 1.0) {
            return Err(ScheduleViolation {
                condition: Condition::Start,
                k: 1,
                slack: 1.0 - t_cur,
            }
            .into());
        }
        let t_next = rule.next_t(1, t_cur)?;
        let beta_prev = policy.beta0;
        let beta_cur = next_beta(&policy, beta_prev, beta_upper_factor(t_cur, t_next), 1);
        let schedule = Self {
            rule,
            policy,
            k: 1,
            t_cur,
            t_next,
            beta_prev,
            beta_cur,
        };
        schedule.check()?;
        Ok(schedule)
    }

    fn check(&self) -> std::result::Result<(), ScheduleViolation> {
        check_pair(self.k, self.t_cur, self.t_next)?;
        if self.beta_cur < self.beta_prev {
            return Err(ScheduleViolation {
                condition: Condition::BetaMonotone,
                k: self.k,
                slack: self.beta_prev - self.beta_cur,
            });
        }
        let cap = beta_upper_factor(self.t_cur, self.t_next) * self.beta_prev;
        if self.beta_cur > cap * (1.0 + SLACK_TOL) {
            return Err(ScheduleViolation {
                condition: Condition::BetaCap,
                k: self.k,
                slack: self.beta_cur - cap,
            });
        }
        Ok(())
    }

    /// Moves from iteration `k` to `k + 1`.
    pub fn advance(&mut self) -> Result<()> {
        let t_after = self.rule.next_t(self.k + 1, self.t_next)?;
        let cap = beta_upper_factor(self.t_next, t_after);
        let beta_next = next_beta(&self.policy, self.beta_cur, cap, self.k + 1);
        self.k += 1;
        self.t_cur = self.t_next;
        self.t_next = t_after;
        self.beta_prev = self.beta_cur;
        self.beta_cur = beta_next;
        self.check()?;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn t_cur(&self) -> f64 {
        self.t_cur
    }
    pub fn t_next(&self) -> f64 {
        self.t_next
    }
    pub fn beta_prev(&self) -> f64 {
        self.beta_prev
    }
    pub fn beta_cur(&self) -> f64 {
        self.beta_cur
    }
    pub fn rule(&self) -> &ExtrapolationRule {
        &self.rule
    }
    pub fn policy(&self) -> &ScalingPolicy {
        &self.policy
    }
}

/// Continuous time scaling `β(t) = c · t^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScaling {
    pub c: f64,
    pub p: f64,
}

impl TimeScaling {
    pub fn constant(c: f64) -> Self {
        Self { c, p: 0.0 }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.c * t.powf(self.p)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if self.p == 0.0 {
            0.0
        } else {
            self.c * self.p * t.powf(self.p - 1.0)
        }
    }

    /// `sup_t t β'(t) / β(t)`, which is `p` for a power law.
    pub fn log_growth(&self) -> f64 {
        self.p
    }

    /// Requires `c > 0`, `p ≥ 0` and `t β'/β ≤ α − 3`.
    pub fn validate(&self, alpha: f64) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0 && self.p.is_finite() && self.p >= 0.0) {
            return Err(Error::Config(format!(
                "time scaling needs c > 0 and p >= 0, got {self:?}"
            )));
        }
        if self.log_growth() > alpha - 3.0 {
            return Err(Error::Config(format!(
                "time scaling grows too fast: t*beta'/beta = {} exceeds alpha - 3 = {}",
                self.p,
                alpha - 3.0
            )));
        }
        Ok(())
    }
}
