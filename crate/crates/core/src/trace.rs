//! Per-iteration metrics shared by the primal-dual solver and the baselines.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Columns of the trace CSV, in order.
pub const CSV_COLUMNS: [&str; 12] = [
    "k",
    "t_k",
    "beta_k",
    "obj_residual",
    "feas_violation",
    "pd_gap",
    "energy_total",
    "energy_e0",
    "energy_e1",
    "energy_e2",
    "inner_iters",
    "wall_ms",
];

/// Metrics of iterate `x_k`. Quantities that are unavailable are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub t_k: f64,
    pub t_next: f64,
    pub beta_k: f64,
    pub beta_prev: f64,
    /// `f(x_k) + g(x_k)`
    pub objective: f64,
    /// `|F(x_k) − F*|`
    pub obj_residual: f64,
    /// `‖Ax_k − b‖`
    pub feas_violation: f64,
    /// `𝓛_ρ(x_k, λ*) − 𝓛_ρ(x*, λ*)`
    pub pd_gap: f64,
    pub energy_total: f64,
    pub energy_e0: f64,
    pub energy_e1: f64,
    pub energy_e2: f64,
    pub kkt: f64,
    /// Inner iterations spent producing `x_k`.
    pub inner_iters: usize,
    pub inner_converged: bool,
    /// `‖v_k − (t_k λ_k − (t_k − 1) λ_{k−1})‖ / max(1, ‖v_k‖)` with `v_k` from the update formula.
    pub v_identity_err: f64,
    /// `‖t_k (λ_k − λ_{k−1})‖`
    pub dual_jump: f64,
    /// `‖λ_k‖`
    pub lambda_norm: f64,
    /// `‖x_k − x_{k−1}‖`
    pub step_norm: f64,
    pub wall_ms: f64,
}

impl TraceRow {
    /// A row with every metric unset.
    pub fn empty(k: usize) -> Self {
        Self {
            k,
            t_k: f64::NAN,
            t_next: f64::NAN,
            beta_k: f64::NAN,
            beta_prev: f64::NAN,
            objective: f64::NAN,
            obj_residual: f64::NAN,
            feas_violation: f64::NAN,
            pd_gap: f64::NAN,
            energy_total: f64::NAN,
            energy_e0: f64::NAN,
            energy_e1: f64::NAN,
            energy_e2: f64::NAN,
            kkt: f64::NAN,
            inner_iters: 0,
            inner_converged: true,
            v_identity_err: f64::NAN,
            dual_jump: f64::NAN,
            lambda_norm: f64::NAN,
            step_norm: f64::NAN,
            wall_ms: f64::NAN,
        }
    }

    /// Value of a CSV column by name.
    pub fn column(&self, name: &str) -> Option<f64> {
        Some(match name {
            "k" => self.k as f64,
            "t_k" => self.t_k,
            "beta_k" => self.beta_k,
            "obj_residual" => self.obj_residual,
            "feas_violation" => self.feas_violation,
            "pd_gap" => self.pd_gap,
            "energy_total" => self.energy_total,
            "energy_e0" => self.energy_e0,
            "energy_e1" => self.energy_e1,
            "energy_e2" => self.energy_e2,
            "inner_iters" => self.inner_iters as f64,
            "wall_ms" => self.wall_ms,
            "objective" => self.objective,
            "kkt" => self.kkt,
            "step_norm" => self.step_norm,
            _ => return None,
        })
    }
}

/// Data from the first iterate that enters the explicit bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub rho: f64,
    pub sigma: f64,
    pub beta0: f64,
    pub t1: f64,
    /// `‖Ax_1 − b‖`
    pub feas1: f64,
    /// `‖λ_1 − λ_0‖`
    pub lambda_jump1: f64,
    /// `‖λ_0‖`
    pub lambda0_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub solver: String,
    pub rows: Vec<TraceRow>,
    pub warnings: Vec<String>,
    pub bound_inputs: Option<BoundInputs>,
    /// `λ_0, λ_1, …` when retained.
    pub lambda_history: Option<Vec<DVector<f64>>>,
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

impl MetricsTrace {
    pub fn new(solver: impl Into<String>) -> Self {
        Self {
            solver: solver.into(),
            ..Self::default()
        }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn row(&self, k: usize) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// `(k, value)` pairs of one column.
    pub fn series(&self, column: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.column(column).map(|v| (r.k, v)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        for r in &self.rows {
            let fields = [
                r.k.to_string(),
                fmt_f64(r.t_k),
                fmt_f64(r.beta_k),
                fmt_f64(r.obj_residual),
                fmt_f64(r.feas_violation),
                fmt_f64(r.pd_gap),
                fmt_f64(r.energy_total),
                fmt_f64(r.energy_e0),
                fmt_f64(r.energy_e1),
                fmt_f64(r.energy_e2),
                r.inner_iters.to_string(),
                fmt_f64(r.wall_ms),
            ];
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}
