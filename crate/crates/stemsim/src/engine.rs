//! Executable forms of the STEM and FedAvg training loops.
//!
//! Iteration indexing follows the pseudocode exactly: at loop step t a worker
//! holds the pair (x_{t+1}, d_t), computes d_{t+1} from gradients at x_{t+1}
//! and x_t evaluated on one shared minibatch, and either takes the local step
//! to x_{t+2} or, when `t mod I = 0`, lets the server average directions and
//! iterates and broadcast the momentum step. The broadcast replaces the local
//! step for that iteration (the worker-side step is skipped when the
//! server-side one fires).
//!
//! Randomness: the batch evaluated at iterate index s is
//! `draw_batch(seed, STREAM_LOCAL_BATCH, k, s, b, n)` — for STEM that means
//! tag `t+1` at loop step t, for FedAvg tag `t` — and the initial batch uses
//! `STREAM_INIT_BATCH`. Any reference implementation drawing batches the same
//! way sees the exact same samples, which is what the trajectory-equality
//! oracles rely on.

use crate::error::{Error, Result};
use crate::problems::ProblemInstance;
use crate::rng::{
    draw_batch, keyed_u64, to_index, STREAM_INIT_BATCH, STREAM_LOCAL_BATCH, STREAM_OUTPUT_PICK,
};
use crate::schedules::ScheduleState;
use crate::vecops::{dist_sq, mean_of, norm_sq};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One worker's slice of the federated state.
#[derive(Clone, Debug)]
pub struct WorkerState {
    pub id: usize,
    /// Current iterate (x_{t+1} at the top of loop step t).
    pub x: Vec<f64>,
    /// Previous iterate (x_t); the momentum correction is evaluated here.
    pub x_prev: Vec<f64>,
    /// Current direction (d_t at the top of loop step t).
    pub d: Vec<f64>,
}

/// Aggregator state; mutated only at communication rounds.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub x_bar: Vec<f64>,
    pub d_bar: Vec<f64>,
    pub round: u64,
}

/// IFO and communication accounting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Counters {
    pub ifo_per_worker: Vec<u64>,
    pub comm_rounds: u64,
}

impl Counters {
    fn new(workers: usize) -> Self {
        Counters {
            ifo_per_worker: vec![0; workers],
            comm_rounds: 0,
        }
    }

    pub fn ifo_total(&self) -> u64 {
        self.ifo_per_worker.iter().sum()
    }
}

/// Per-iteration record row; mirrors the CSV columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRow {
    pub t: u64,
    /// 1-based index of the communication round iteration t belongs to.
    pub round: u64,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub eta: f64,
    pub a: f64,
    pub e_norm_sq: f64,
    pub consensus_sq: f64,
    pub drift_sq: f64,
    pub ifo_total: u64,
    pub comm_rounds: u64,
}

/// Post-aggregation state check captured at each communication round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyncCheck {
    pub round: u64,
    pub t: u64,
    pub consensus_sq: f64,
    /// Direction consensus; `None` for FedAvg, which shares no directions.
    pub drift_sq: Option<f64>,
}

/// Full trajectory record of one run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// x̄_t for t = 1..T (between syncs this is a diagnostic mean only).
    pub trajectory: Vec<Vec<f64>>,
    pub sync_checks: Vec<SyncCheck>,
    /// 1-based t of the uniformly drawn output iterate.
    pub output_index: u64,
    pub output_iterate: Vec<f64>,
    pub counters: Counters,
}

/// Knobs common to both training loops.
#[derive(Clone, Debug)]
pub struct RunOpts {
    /// Worker-update threads; any value yields bitwise-identical records.
    pub threads: usize,
    /// Evaluate every direction on the full local dataset instead of sampled
    /// minibatches (exact-gradient mode; IFO is charged accordingly).
    pub exact_batches: bool,
    /// Common initial iterate; zero vector when absent.
    pub x0: Option<Vec<f64>>,
}

impl Default for RunOpts {
    fn default() -> Self {
        RunOpts {
            threads: 1,
            exact_batches: false,
            x0: None,
        }
    }
}

/// Constant-step FedAvg parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FedAvgParams {
    pub eta: f64,
    pub local_updates: u64,
    pub batch: u64,
    pub workers: u64,
    pub total_iters: u64,
}

fn check_problem_match(p: &ProblemInstance, workers: u64) -> Result<()> {
    if p.workers() as u64 != workers {
        return Err(Error::Config(format!(
            "schedule is for K = {workers} workers but the problem has {}",
            p.workers()
        )));
    }
    Ok(())
}

fn initial_point(p: &ProblemInstance, x0: Option<&[f64]>) -> Result<Vec<f64>> {
    match x0 {
        None => Ok(vec![0.0; p.dim()]),
        Some(v) if v.len() == p.dim() => Ok(v.to_vec()),
        Some(v) => Err(Error::Config(format!(
            "x0 has dimension {} but the problem has {}",
            v.len(),
            p.dim()
        ))),
    }
}

/// Initialize STEM: common x₁, per-worker initial batch of size B, shared
/// averaged direction d̄₁, and the pre-loop step x₂ = x₁ − η₁·d̄₁.
/// Charges K·B IFO units.
pub fn init_stem(
    p: &ProblemInstance,
    s: &ScheduleState,
    seed: u64,
    opts: &RunOpts,
) -> Result<(Vec<WorkerState>, ServerState, Counters)> {
    check_problem_match(p, s.workers)?;
    let x1 = initial_point(p, opts.x0.as_deref())?;
    let mut counters = Counters::new(p.workers());

    let mut local_dirs = Vec::with_capacity(p.workers());
    for k in 0..p.workers() {
        let n = p.n_samples(k);
        let batch: Vec<usize> = if opts.exact_batches {
            (0..n).collect()
        } else {
            draw_batch(seed, STREAM_INIT_BATCH, k, 0, s.init_batch as usize, n)
        };
        let g = p
            .sample_gradient(k, &x1, &batch, &mut counters.ifo_per_worker[k])
            .expect("init batch indices are in range");
        local_dirs.push(g);
    }
    let refs: Vec<&[f64]> = local_dirs.iter().map(|v| v.as_slice()).collect();
    let d_bar = mean_of(&refs);

    let eta1 = s.eta_at(1);
    let mut x2 = x1.clone();
    for (xi, di) in x2.iter_mut().zip(&d_bar) {
        *xi -= eta1 * di;
    }

    let workers = (0..p.workers())
        .map(|id| WorkerState {
            id,
            x: x2.clone(),
            x_prev: x1.clone(),
            d: d_bar.clone(),
        })
        .collect();
    let server = ServerState {
        x_bar: x1,
        d_bar,
        round: 0,
    };
    Ok((workers, server, counters))
}

/// Worker-side momentum step at loop iteration t: computes d_{t+1} on one
/// shared minibatch evaluated at both x_{t+1} and x_t (2b IFO units) and,
/// unless a communication round fires at this t, takes the local iterate
/// step.
pub fn stem_local_update(
    p: &ProblemInstance,
    s: &ScheduleState,
    w: &mut WorkerState,
    t: u64,
    seed: u64,
    exact_batches: bool,
    ifo: &mut u64,
) {
    let n = p.n_samples(w.id);
    let batch: Vec<usize> = if exact_batches {
        (0..n).collect()
    } else {
        draw_batch(seed, STREAM_LOCAL_BATCH, w.id, t + 1, s.batch as usize, n)
    };
    let g_new = p
        .sample_gradient(w.id, &w.x, &batch, ifo)
        .expect("batch indices are in range");
    let g_old = p
        .sample_gradient(w.id, &w.x_prev, &batch, ifo)
        .expect("batch indices are in range");

    let a = s.momentum_at(t); // a_{t+1} = c·η_t²
    let mut d_new = g_new;
    if a < 1.0 {
        let keep = 1.0 - a;
        for i in 0..d_new.len() {
            d_new[i] += keep * (w.d[i] - g_old[i]);
        }
    }
    w.d = d_new;

    if !t.is_multiple_of(s.local_updates) {
        let eta_next = s.eta_at(t + 1);
        let mut x_next = w.x.clone();
        for (xi, di) in x_next.iter_mut().zip(&w.d) {
            *xi -= eta_next * di;
        }
        w.x_prev = std::mem::replace(&mut w.x, x_next);
    }
    // When t mod I = 0 the server aggregate supplies the next iterate.
}

/// Server-side momentum step at `t mod I = 0`: averages directions and
/// iterates, broadcasts d̄_{t+1} and x_{t+2} = x̄_{t+1} − η_{t+1}·d̄_{t+1}.
pub fn stem_server_aggregate(
    p: &ProblemInstance,
    s: &ScheduleState,
    workers: &mut [WorkerState],
    server: &mut ServerState,
    counters: &mut Counters,
    t: u64,
) -> Result<()> {
    let _ = p;
    if !t.is_multiple_of(s.local_updates) {
        return Err(Error::Protocol(format!(
            "aggregation called at t = {t}, which is not a multiple of I = {}",
            s.local_updates
        )));
    }
    let d_refs: Vec<&[f64]> = workers.iter().map(|w| w.d.as_slice()).collect();
    let d_bar = mean_of(&d_refs);
    let x_refs: Vec<&[f64]> = workers.iter().map(|w| w.x.as_slice()).collect();
    let x_bar = mean_of(&x_refs);

    let eta_next = s.eta_at(t + 1);
    let mut x_next = x_bar.clone();
    for (xi, di) in x_next.iter_mut().zip(&d_bar) {
        *xi -= eta_next * di;
    }

    for w in workers.iter_mut() {
        std::mem::swap(&mut w.x_prev, &mut w.x); // x_prev ← x_{t+1}
        w.x = x_next.clone();
        w.d = d_bar.clone();
    }
    server.x_bar = x_bar;
    server.d_bar = d_bar;
    server.round += 1;
    counters.comm_rounds += 1;
    Ok(())
}

/// Uniform pick of the output iterate; deterministic in the seed.
pub fn select_output(trajectory: &[Vec<f64>], seed: u64) -> Result<(u64, Vec<f64>)> {
    if trajectory.is_empty() {
        return Err(Error::Usage(
            "cannot select an output from an empty trajectory".into(),
        ));
    }
    let idx = to_index(
        keyed_u64(seed, STREAM_OUTPUT_PICK, 0, 0, 0),
        trajectory.len(),
    );
    Ok((idx as u64 + 1, trajectory[idx].clone()))
}

struct RowBuilder<'a> {
    p: &'a ProblemInstance,
}

impl<'a> RowBuilder<'a> {
    /// Build the row for time t from the same-time pair (x_t^{(k)}, d_t^{(k)})
    /// and the accounting totals spent to reach x_t.
    #[allow(clippy::too_many_arguments)]
    fn build(
        &self,
        t: u64,
        local_updates: u64,
        eta: f64,
        a: f64,
        xs: &[&[f64]],
        ds: &[&[f64]],
        ifo_total: u64,
        comm_rounds: u64,
    ) -> (RunRow, Vec<f64>) {
        let x_bar = mean_of(xs);
        let d_bar = mean_of(ds);
        let loss = self.p.global_value(&x_bar);
        let grad_norm_sq = norm_sq(&self.p.global_gradient(&x_bar));

        // ē_t = d̄_t − (1/K) Σ_k ∇f^(k)(x_t^(k)); exact oracles, no IFO.
        let worker_grads: Vec<Vec<f64>> = (0..xs.len())
            .map(|k| self.p.full_gradient(k, xs[k]))
            .collect();
        let grad_refs: Vec<&[f64]> = worker_grads.iter().map(|g| g.as_slice()).collect();
        let mean_grad = mean_of(&grad_refs);
        let e_norm_sq = dist_sq(&d_bar, &mean_grad);

        let consensus_sq = crate::vecops::spread_sq(xs);
        let drift_sq = crate::vecops::spread_sq(ds);

        let row = RunRow {
            t,
            round: t.div_ceil(local_updates),
            loss,
            grad_norm_sq,
            eta,
            a,
            e_norm_sq,
            consensus_sq,
            drift_sq,
            ifo_total,
            comm_rounds,
        };
        (row, x_bar)
    }
}

fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Run STEM for `s.total_iters` iterations and record the full trajectory.
pub fn run_stem(
    p: &ProblemInstance,
    s: &ScheduleState,
    opts: &RunOpts,
    seed: u64,
) -> Result<RunRecord> {
    with_pool(opts.threads, || run_stem_inner(p, s, opts, seed))?
}

fn run_stem_inner(
    p: &ProblemInstance,
    s: &ScheduleState,
    opts: &RunOpts,
    seed: u64,
) -> Result<RunRecord> {
    let (mut workers, mut server, mut counters) = init_stem(p, s, seed, opts)?;
    let t_total = s.total_iters;
    let builder = RowBuilder { p };
    let mut rows = Vec::with_capacity(t_total as usize);
    let mut trajectory = Vec::with_capacity(t_total as usize);
    let mut sync_checks = Vec::with_capacity(s.rounds() as usize);
    let parallel = opts.threads > 1;

    for t in 1..=t_total {
        // Row t reflects the state (x_t, d_t) before this iteration's update.
        let xs: Vec<&[f64]> = workers.iter().map(|w| w.x_prev.as_slice()).collect();
        let ds: Vec<&[f64]> = workers.iter().map(|w| w.d.as_slice()).collect();
        let a_t = if t == 1 { 1.0 } else { s.momentum_at(t - 1) };
        let (row, x_bar) = builder.build(
            t,
            s.local_updates,
            s.eta_at(t),
            a_t,
            &xs,
            &ds,
            counters.ifo_total(),
            counters.comm_rounds,
        );
        rows.push(row);
        trajectory.push(x_bar);

        if parallel {
            workers
                .par_iter_mut()
                .zip(counters.ifo_per_worker.par_iter_mut())
                .for_each(|(w, ifo)| stem_local_update(p, s, w, t, seed, opts.exact_batches, ifo));
        } else {
            for (w, ifo) in workers.iter_mut().zip(counters.ifo_per_worker.iter_mut()) {
                stem_local_update(p, s, w, t, seed, opts.exact_batches, ifo);
            }
        }

        if t % s.local_updates == 0 {
            stem_server_aggregate(p, s, &mut workers, &mut server, &mut counters, t)?;
            // Recompute the broadcast from the server state with the same
            // expression the aggregate used; the workers must match it
            // exactly, and their directions must match d̄ exactly.
            let eta_next = s.eta_at(t + 1);
            let mut broadcast = server.x_bar.clone();
            for (xi, di) in broadcast.iter_mut().zip(&server.d_bar) {
                *xi -= eta_next * di;
            }
            let consensus_sq: f64 = workers.iter().map(|w| dist_sq(&w.x, &broadcast)).sum();
            let drift_sq: f64 = workers.iter().map(|w| dist_sq(&w.d, &server.d_bar)).sum();
            sync_checks.push(SyncCheck {
                round: server.round,
                t,
                consensus_sq,
                drift_sq: Some(drift_sq),
            });
        }
    }

    let (output_index, output_iterate) = select_output(&trajectory, seed)?;
    Ok(RunRecord {
        rows,
        trajectory,
        sync_checks,
        output_index,
        output_iterate,
        counters,
    })
}

/// Run FedAvg for `params.total_iters` iterations.
pub fn run_fedavg(
    p: &ProblemInstance,
    params: &FedAvgParams,
    opts: &RunOpts,
    seed: u64,
) -> Result<RunRecord> {
    with_pool(opts.threads, || run_fedavg_inner(p, params, opts, seed))?
}

/// FedAvg worker step at loop iteration t: plain minibatch direction at x_t
/// (b IFO units), then the local step x_{t+1} = x_t − η·d_t.
pub fn fedavg_local_update(
    p: &ProblemInstance,
    params: &FedAvgParams,
    w: &mut WorkerState,
    t: u64,
    seed: u64,
    exact_batches: bool,
    ifo: &mut u64,
) {
    let n = p.n_samples(w.id);
    let batch: Vec<usize> = if exact_batches {
        (0..n).collect()
    } else {
        draw_batch(seed, STREAM_LOCAL_BATCH, w.id, t, params.batch as usize, n)
    };
    let d = p
        .sample_gradient(w.id, &w.x, &batch, ifo)
        .expect("batch indices are in range");
    std::mem::swap(&mut w.x_prev, &mut w.x);
    w.x = w.x_prev.clone();
    for (xi, di) in w.x.iter_mut().zip(&d) {
        *xi -= params.eta * di;
    }
    w.d = d;
}

/// FedAvg aggregation: average iterates only and broadcast; the server keeps
/// no direction state.
pub fn fedavg_aggregate(
    workers: &mut [WorkerState],
    server: &mut ServerState,
    counters: &mut Counters,
    params: &FedAvgParams,
    t: u64,
) -> Result<()> {
    if !t.is_multiple_of(params.local_updates) {
        return Err(Error::Protocol(format!(
            "aggregation called at t = {t}, which is not a multiple of I = {}",
            params.local_updates
        )));
    }
    let x_refs: Vec<&[f64]> = workers.iter().map(|w| w.x.as_slice()).collect();
    let x_bar = mean_of(&x_refs);
    for w in workers.iter_mut() {
        w.x = x_bar.clone();
    }
    server.x_bar = x_bar;
    server.round += 1;
    counters.comm_rounds += 1;
    Ok(())
}

fn run_fedavg_inner(
    p: &ProblemInstance,
    params: &FedAvgParams,
    opts: &RunOpts,
    seed: u64,
) -> Result<RunRecord> {
    check_problem_match(p, params.workers)?;
    if params.total_iters == 0 || !params.total_iters.is_multiple_of(params.local_updates) {
        return Err(Error::Config(format!(
            "T = {} must be a positive multiple of I = {}",
            params.total_iters, params.local_updates
        )));
    }
    let x1 = initial_point(p, opts.x0.as_deref())?;
    let mut counters = Counters::new(p.workers());
    let mut workers: Vec<WorkerState> = (0..p.workers())
        .map(|id| WorkerState {
            id,
            x: x1.clone(),
            x_prev: x1.clone(),
            d: vec![0.0; p.dim()],
        })
        .collect();
    let mut server = ServerState {
        x_bar: x1,
        d_bar: vec![0.0; p.dim()], // FedAvg server holds no direction
        round: 0,
    };

    let builder = RowBuilder { p };
    let t_total = params.total_iters;
    let mut rows = Vec::with_capacity(t_total as usize);
    let mut trajectory = Vec::with_capacity(t_total as usize);
    let mut sync_checks = Vec::with_capacity((t_total / params.local_updates) as usize);
    let parallel = opts.threads > 1;

    for t in 1..=t_total {
        // Compute this iteration's directions first so row t records the
        // same-time pair (x_t, d_t), then take the local steps. The counter
        // snapshot is taken beforehand: row t carries the cost of reaching
        // x_t, as in the STEM loop.
        let ifo_before = counters.ifo_total();
        let rounds_before = counters.comm_rounds;
        let xs_snapshot: Vec<Vec<f64>> = workers.iter().map(|w| w.x.clone()).collect();
        if parallel {
            workers
                .par_iter_mut()
                .zip(counters.ifo_per_worker.par_iter_mut())
                .for_each(|(w, ifo)| {
                    fedavg_local_update(p, params, w, t, seed, opts.exact_batches, ifo)
                });
        } else {
            for (w, ifo) in workers.iter_mut().zip(counters.ifo_per_worker.iter_mut()) {
                fedavg_local_update(p, params, w, t, seed, opts.exact_batches, ifo);
            }
        }
        let xs: Vec<&[f64]> = xs_snapshot.iter().map(|x| x.as_slice()).collect();
        let ds: Vec<&[f64]> = workers.iter().map(|w| w.d.as_slice()).collect();
        let (row, x_bar) = builder.build(
            t,
            params.local_updates,
            params.eta,
            1.0,
            &xs,
            &ds,
            ifo_before,
            rounds_before,
        );
        rows.push(row);
        trajectory.push(x_bar);

        if t % params.local_updates == 0 {
            fedavg_aggregate(&mut workers, &mut server, &mut counters, params, t)?;
            let consensus_sq: f64 = workers.iter().map(|w| dist_sq(&w.x, &server.x_bar)).sum();
            sync_checks.push(SyncCheck {
                round: server.round,
                t,
                consensus_sq,
                drift_sq: None,
            });
        }
    }

    let (output_index, output_iterate) = select_output(&trajectory, seed)?;
    Ok(RunRecord {
        rows,
        trajectory,
        sync_checks,
        output_index,
        output_iterate,
        counters,
    })
}
