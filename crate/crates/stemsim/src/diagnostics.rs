//! Measurable analysis quantities: the direction tracking error ē_t, the
//! potential Φ_t, consensus and drift sums, ε-stationarity queries and a
//! finite-difference gradient verifier.
//!
//! Everything here uses the exact finite-sum oracles and charges no IFO;
//! these functions play the role of the analysis, not the algorithm.

use crate::engine::{RunRecord, RunRow, ServerState, WorkerState};
use crate::error::{Error, Result};
use crate::problems::ProblemInstance;
use crate::schedules::ScheduleState;
use crate::vecops::{dist_sq, mean_of, norm_sq};
use serde::{Deserialize, Serialize};

/// One evaluation of the four analysis quantities.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiagnosticsSnapshot {
    /// ‖ē_t‖² — squared tracking error of the aggregated direction.
    pub e_norm_sq: f64,
    /// Φ_t — objective plus weighted tracking-error energy.
    pub potential: f64,
    /// Σ_k ‖x^(k) − x̄‖².
    pub consensus_sq: f64,
    /// Σ_k ‖d^(k) − d̄‖².
    pub drift_sq: f64,
}

/// ‖d̄ − (1/K) Σ_k ∇f^(k)(x^(k))‖² for an explicit direction/iterate set.
pub fn gradient_error_sq(p: &ProblemInstance, xs: &[&[f64]], d_bar: &[f64]) -> f64 {
    let grads: Vec<Vec<f64>> = (0..xs.len()).map(|k| p.full_gradient(k, xs[k])).collect();
    let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
    dist_sq(d_bar, &mean_of(&refs))
}

/// Tracking error against the server's direction, evaluated at the worker
/// iterates the current directions were formed from. The server copy of d̄
/// is current at initialization and right after every aggregation.
pub fn gradient_error(p: &ProblemInstance, workers: &[WorkerState], server: &ServerState) -> f64 {
    let xs: Vec<&[f64]> = workers.iter().map(|w| w.x_prev.as_slice()).collect();
    gradient_error_sq(p, &xs, &server.d_bar)
}

/// Same quantity with d̄ re-averaged from the workers instead of read from
/// the server; the two routes must agree whenever the server copy is fresh.
pub fn gradient_error_recomputed(p: &ProblemInstance, workers: &[WorkerState]) -> f64 {
    let xs: Vec<&[f64]> = workers.iter().map(|w| w.x_prev.as_slice()).collect();
    let ds: Vec<&[f64]> = workers.iter().map(|w| w.d.as_slice()).collect();
    gradient_error_sq(p, &xs, &mean_of(&ds))
}

/// Σ_k ‖x^(k) − x̄‖² over the workers' current iterates; exact zero whenever
/// all iterates coincide bitwise.
pub fn consensus(workers: &[WorkerState]) -> f64 {
    let xs: Vec<&[f64]> = workers.iter().map(|w| w.x.as_slice()).collect();
    crate::vecops::spread_sq(&xs)
}

/// Σ_k ‖d^(k) − d̄‖² against the server's direction.
pub fn drift(workers: &[WorkerState], server: &ServerState) -> f64 {
    workers.iter().map(|w| dist_sq(&w.d, &server.d_bar)).sum()
}

/// Φ_t = f(x̄_t) + (bK/(64 L²))·‖ē_t‖²/η_{t−1}, from live worker state.
pub fn potential(
    p: &ProblemInstance,
    workers: &[WorkerState],
    server: &ServerState,
    s: &ScheduleState,
    l_hat: f64,
    t: u64,
) -> f64 {
    let _ = server;
    let xs: Vec<&[f64]> = workers.iter().map(|w| w.x_prev.as_slice()).collect();
    let x_bar = mean_of(&xs);
    let ds: Vec<&[f64]> = workers.iter().map(|w| w.d.as_slice()).collect();
    let e_sq = gradient_error_sq(p, &xs, &mean_of(&ds));
    potential_value(p.global_value(&x_bar), e_sq, s, l_hat, t)
}

/// Φ_t assembled from a recorded row (loss and ‖ē_t‖² are stored there).
pub fn potential_from_row(row: &RunRow, s: &ScheduleState, l_hat: f64) -> f64 {
    potential_value(row.loss, row.e_norm_sq, s, l_hat, row.t)
}

fn potential_value(loss: f64, e_sq: f64, s: &ScheduleState, l_hat: f64, t: u64) -> f64 {
    assert!(t >= 1, "potential is defined from t = 1 (uses eta at t-1)");
    let weight = (s.batch * s.workers) as f64 / (64.0 * l_hat * l_hat);
    loss + weight * e_sq / s.eta_at(t - 1)
}

/// Definition test ‖∇f(x)‖² ≤ ε on the exact global gradient.
pub fn is_stationary(p: &ProblemInstance, x: &[f64], eps: f64) -> bool {
    norm_sq(&p.global_gradient(x)) <= eps
}

/// First communication round whose recorded iterate is ε-stationary.
pub fn rounds_to_eps(record: &RunRecord, eps: f64) -> Option<u64> {
    record
        .rows
        .iter()
        .find(|r| r.grad_norm_sq <= eps)
        .map(|r| r.comm_rounds)
}

/// Total IFO spent when the recorded trajectory first became ε-stationary.
pub fn ifo_to_eps(record: &RunRecord, eps: f64) -> Option<u64> {
    record
        .rows
        .iter()
        .find(|r| r.grad_norm_sq <= eps)
        .map(|r| r.ifo_total)
}

/// Max relative deviation between the exact global gradient and its central
/// finite-difference estimate over the given points. The error of each point
/// is ‖g_fd − g‖ / max(1, ‖g‖).
pub fn finite_diff_check(p: &ProblemInstance, points: &[Vec<f64>], h: f64) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::Usage(
            "finite-difference step h must be positive".into(),
        ));
    }
    if points.is_empty() {
        return Err(Error::Usage("no probe points given".into()));
    }
    let mut worst: f64 = 0.0;
    for x in points {
        if x.len() != p.dim() {
            return Err(Error::Usage("probe point dimension mismatch".into()));
        }
        let g = p.global_gradient(x);
        let mut fd = vec![0.0; x.len()];
        let mut xp = x.clone();
        for j in 0..x.len() {
            xp[j] = x[j] + h;
            let up = p.global_value(&xp);
            xp[j] = x[j] - h;
            let down = p.global_value(&xp);
            xp[j] = x[j];
            fd[j] = (up - down) / (2.0 * h);
        }
        let err = dist_sq(&fd, &g).sqrt() / norm_sq(&g).sqrt().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
