//! Config-driven experiment execution: single runs, trade-off sweeps over ν,
//! complexity-exponent fits, and CSV/JSON serialization of results.

use crate::config::{Algorithm, BatchMode, ExperimentConfig};
use crate::diagnostics::{ifo_to_eps, rounds_to_eps};
use crate::engine::{run_fedavg, run_stem, FedAvgParams, RunOpts, RunRecord};
use crate::error::{Error, Result};
use crate::problems::{measure_profile, ProblemInstance};
use crate::rng::{DetRng, STREAM_PROBLEM_GEN};
use crate::schedules::{
    fedavg_eta, fedavg_min_horizon, fedavg_tradeoff, practical_schedule, stem_tradeoff,
    theoretical_schedule, ScheduleMode, ScheduleState,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Fully resolved algorithm parameters for one experiment.
#[derive(Clone, Debug)]
pub enum ResolvedAlgo {
    Stem(ScheduleState),
    FedAvg(FedAvgParams),
}

/// Audit echo of every derived quantity, written into summaries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolvedEcho {
    pub algorithm: Algorithm,
    pub mode: Option<ScheduleMode>,
    pub nu: Option<f64>,
    pub local_updates: u64,
    pub batch: u64,
    pub init_batch: u64,
    pub total_iters: u64,
    /// Original horizon when it had to be padded to a multiple of I.
    pub padded_from: Option<u64>,
    /// First step size (η₁ for STEM, the constant η for FedAvg).
    pub eta1: f64,
    pub c: Option<f64>,
    pub kappa_bar: Option<f64>,
    pub a_override: Option<f64>,
    pub eta_const: Option<f64>,
    pub sigma: Option<f64>,
    pub l_smooth: Option<f64>,
    pub exact_batches: bool,
    pub warnings: Vec<String>,
}

/// A built problem plus resolved algorithm, ready to run under any seed.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub problem: ProblemInstance,
    pub algo: ResolvedAlgo,
    pub exact_batches: bool,
    pub threads: usize,
    pub x0: Option<Vec<f64>>,
    pub echo: ResolvedEcho,
}

/// Probe points used when σ and L have to be measured from the problem.
fn measurement_probes(p: &ProblemInstance, seed: u64) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
    let mut rng = DetRng::from_key(seed, STREAM_PROBLEM_GEN, 0x7072_6f62, 1);
    let count = 6;
    let pts: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..p.dim()).map(|_| 0.5 * rng.normal()).collect())
        .collect();
    let pairs: Vec<(usize, usize)> = (0..count - 1).map(|i| (i, i + 1)).collect();
    (pts, pairs)
}

/// Resolve a configuration into concrete run parameters.
///
/// Resolution order: the `minibatch-sgd` alias canonicalizes to STEM with
/// I = 1 and forced a ≡ 1; explicit (I, b) beat ν-derived values; T is
/// padded up to a multiple of I; theoretical mode with measured σ = 0 falls
/// back to the practical mode.
pub fn resolve(config: &ExperimentConfig) -> Result<Resolved> {
    config.validate()?;
    let problem = config.problem.build()?;
    let workers = problem.workers() as u64;
    let mut warnings = Vec::new();

    // Canonicalize the minibatch-SGD alias.
    let (algorithm, forced_i, force_a) = match config.algorithm {
        Algorithm::MinibatchSgd => (Algorithm::Stem, Some(1), Some(1.0)),
        other => (other, None, config.schedule.force_a),
    };

    // (I, b): explicit overrides win over the ν-derived trade-off values.
    let sched = &config.schedule;
    let derived = match sched.nu {
        Some(nu) if sched.local_updates.is_none() || sched.batch.is_none() => {
            let choice = match algorithm {
                Algorithm::Stem => stem_tradeoff(nu, sched.total_iters, workers)?,
                Algorithm::FedAvg => fedavg_tradeoff(nu, sched.total_iters, workers)?,
                Algorithm::MinibatchSgd => unreachable!("canonicalized above"),
            };
            if choice.clamped {
                warnings.push(format!(
                    "horizon T = {} is below the trade-off map's floor for K = {workers}; using (I, b) = (1, 1)",
                    sched.total_iters
                ));
            }
            Some(choice)
        }
        _ => None,
    };
    let mut local_updates = forced_i
        .or(sched.local_updates)
        .or(derived.map(|c| c.local_updates))
        .ok_or_else(|| {
            Error::Config("set either schedule.nu or explicit local_updates/batch".into())
        })?;
    let mut batch = sched.batch.or(derived.map(|c| c.batch)).ok_or_else(|| {
        Error::Config("set either schedule.nu or explicit local_updates/batch".into())
    })?;
    if local_updates == 0 || batch == 0 {
        return Err(Error::Config(
            "local_updates and batch must be positive".into(),
        ));
    }

    let exact_batches = sched.batch_mode == BatchMode::Full;
    if exact_batches {
        batch = config.problem.n_per_worker as u64;
        local_updates = local_updates.max(1);
    }

    // Pad the horizon up to a whole number of rounds.
    let t_raw = sched.total_iters;
    let total_iters = if t_raw.is_multiple_of(local_updates) {
        t_raw
    } else {
        let padded = t_raw + (local_updates - t_raw % local_updates);
        warnings.push(format!(
            "padded T from {t_raw} to {padded} (multiple of I = {local_updates})"
        ));
        padded
    };
    let padded_from = (total_iters != t_raw).then_some(t_raw);

    let resolved = match algorithm {
        Algorithm::Stem => {
            let mut mode = sched.mode;
            let mut sigma_used = sched.sigma;
            let mut l_used = sched.l_smooth;
            if mode == ScheduleMode::Theoretical && (sigma_used.is_none() || l_used.is_none()) {
                let (pts, pairs) = measurement_probes(&problem, config.problem.seed);
                let prof = measure_profile(&problem, &pts, &pairs)?;
                sigma_used.get_or_insert(prof.sigma);
                l_used.get_or_insert(prof.l_hat);
            }
            if mode == ScheduleMode::Theoretical && sigma_used.unwrap_or(0.0) <= 0.0 {
                warnings.push(
                    "measured sigma = 0 makes the theoretical step law degenerate; using the practical mode"
                        .into(),
                );
                mode = ScheduleMode::Practical;
            }
            let mut state = match mode {
                ScheduleMode::Theoretical => theoretical_schedule(
                    sigma_used.unwrap(),
                    l_used.unwrap(),
                    batch,
                    workers,
                    local_updates,
                    total_iters,
                )?,
                ScheduleMode::Practical => {
                    let mut kappa = if sched.kappa_bk_scaling {
                        sched.kappa * ((batch * workers) as f64).powf(2.0 / 3.0)
                    } else {
                        sched.kappa
                    };
                    if let Some(cap) = sched.kappa_max {
                        kappa = kappa.min(cap);
                    }
                    practical_schedule(
                        kappa,
                        sched.cbar,
                        batch,
                        workers,
                        local_updates,
                        total_iters,
                        sched.epoch_len,
                    )?
                }
            };
            state.nu = sched.nu;
            if let Some(b0) = sched.init_batch {
                if b0 == 0 {
                    return Err(Error::Config("init_batch must be positive".into()));
                }
                state.init_batch = b0;
            }
            if let Some(a) = force_a {
                if a <= 0.0 {
                    return Err(Error::Config("force_a must be positive".into()));
                }
                state.a_override = Some(a);
            }
            let echo = ResolvedEcho {
                algorithm: config.algorithm,
                mode: Some(mode),
                nu: sched.nu,
                local_updates,
                batch,
                init_batch: state.init_batch,
                total_iters,
                padded_from,
                eta1: state.eta_at(1),
                c: Some(state.c),
                kappa_bar: Some(state.kappa_bar),
                a_override: state.a_override,
                eta_const: None,
                sigma: (mode == ScheduleMode::Theoretical).then_some(state.sigma),
                l_smooth: (mode == ScheduleMode::Theoretical).then_some(state.l_smooth),
                exact_batches,
                warnings: warnings.clone(),
            };
            Resolved {
                problem,
                algo: ResolvedAlgo::Stem(state),
                exact_batches,
                threads: config.threads,
                x0: config.x0.clone(),
                echo,
            }
        }
        Algorithm::FedAvg => {
            let eta = match sched.eta {
                Some(e) if e > 0.0 => e,
                Some(e) => return Err(Error::Config(format!("eta must be positive, got {e}"))),
                None => fedavg_eta(batch, workers, total_iters),
            };
            if let Some(l) = sched.l_smooth {
                let floor = fedavg_min_horizon(l, local_updates, batch, workers);
                if (total_iters as f64) < floor {
                    warnings.push(format!(
                        "T = {total_iters} is below the FedAvg guarantee floor {floor:.0}"
                    ));
                }
            }
            let params = FedAvgParams {
                eta,
                local_updates,
                batch,
                workers,
                total_iters,
            };
            let echo = ResolvedEcho {
                algorithm: config.algorithm,
                mode: None,
                nu: sched.nu,
                local_updates,
                batch,
                init_batch: 0,
                total_iters,
                padded_from,
                eta1: eta,
                c: None,
                kappa_bar: None,
                a_override: None,
                eta_const: Some(eta),
                sigma: sched.sigma,
                l_smooth: sched.l_smooth,
                exact_batches,
                warnings: warnings.clone(),
            };
            Resolved {
                problem,
                algo: ResolvedAlgo::FedAvg(params),
                exact_batches,
                threads: config.threads,
                x0: config.x0.clone(),
                echo,
            }
        }
        Algorithm::MinibatchSgd => unreachable!("canonicalized above"),
    };
    Ok(resolved)
}

impl Resolved {
    /// Execute one seed.
    pub fn run(&self, seed: u64) -> Result<RunRecord> {
        let opts = RunOpts {
            threads: self.threads,
            exact_batches: self.exact_batches,
            x0: self.x0.clone(),
        };
        match &self.algo {
            ResolvedAlgo::Stem(s) => run_stem(&self.problem, s, &opts, seed),
            ResolvedAlgo::FedAvg(p) => run_fedavg(&self.problem, p, &opts, seed),
        }
    }
}

/// Post-hoc ε-target evaluation of one record.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpsStat {
    pub eps: f64,
    /// Communication rounds to first ε-crossing; absent when never reached.
    pub rounds: Option<u64>,
    /// IFO total at first ε-crossing; absent when never reached.
    pub ifo: Option<u64>,
}

/// Scalar summary of one seeded run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub best_loss: f64,
    pub best_grad_norm_sq: f64,
    pub ifo_total: u64,
    pub comm_rounds: u64,
    pub eps: Vec<EpsStat>,
    pub output_index: u64,
    pub output_iterate: Vec<f64>,
    pub max_sync_consensus_sq: f64,
    pub max_sync_drift_sq: Option<f64>,
}

pub fn summarize(record: &RunRecord, eps_targets: &[f64], seed: u64) -> RunSummary {
    let last = record.rows.last().expect("records hold at least one row");
    let best_loss = record
        .rows
        .iter()
        .map(|r| r.loss)
        .fold(f64::INFINITY, f64::min);
    let best_grad = record
        .rows
        .iter()
        .map(|r| r.grad_norm_sq)
        .fold(f64::INFINITY, f64::min);
    let eps = eps_targets
        .iter()
        .map(|&e| EpsStat {
            eps: e,
            rounds: rounds_to_eps(record, e),
            ifo: ifo_to_eps(record, e),
        })
        .collect();
    let max_sync_consensus_sq = record
        .sync_checks
        .iter()
        .map(|c| c.consensus_sq)
        .fold(0.0, f64::max);
    let drifts: Vec<f64> = record
        .sync_checks
        .iter()
        .filter_map(|c| c.drift_sq)
        .collect();
    let max_sync_drift_sq = if drifts.is_empty() {
        None
    } else {
        Some(drifts.into_iter().fold(0.0, f64::max))
    };
    RunSummary {
        seed,
        final_loss: last.loss,
        final_grad_norm_sq: last.grad_norm_sq,
        best_loss,
        best_grad_norm_sq: best_grad,
        ifo_total: record.counters.ifo_total(),
        comm_rounds: record.counters.comm_rounds,
        eps,
        output_index: record.output_index,
        output_iterate: record.output_iterate.clone(),
        max_sync_consensus_sq,
        max_sync_drift_sq,
    }
}

/// Results of a full experiment (all seeds).
#[derive(Debug)]
pub struct ExperimentOutput {
    pub echo: ResolvedEcho,
    pub runs: Vec<(u64, RunRecord, RunSummary)>,
}

/// Resolve, execute every seed, and (when `out_dir` is set) write one CSV
/// and one JSON summary per seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let resolved = resolve(config)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let record = resolved.run(seed)?;
        let summary = summarize(&record, &config.eps_targets, seed);
        runs.push((seed, record, summary));
    }
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
        for (seed, record, summary) in &runs {
            let csv_path = dir.join(format!("run_seed{seed}.csv"));
            std::fs::write(&csv_path, run_csv(record))?;
            let json_path = dir.join(format!("run_seed{seed}.json"));
            let payload = serde_json::json!({
                "config": config,
                "resolved": resolved.echo,
                "summary": summary,
            });
            std::fs::write(&json_path, serde_json::to_string_pretty(&payload)?)?;
        }
    }
    Ok(ExperimentOutput {
        echo: resolved.echo,
        runs,
    })
}

/// Render a record as CSV with the standard column set.
pub fn run_csv(record: &RunRecord) -> String {
    let mut out = String::with_capacity(record.rows.len() * 96);
    out.push_str(
        "t,round,loss,grad_norm_sq,eta,a,e_norm_sq,consensus_sq,drift_sq,ifo_total,comm_rounds\n",
    );
    for r in &record.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.round,
            r.loss,
            r.grad_norm_sq,
            r.eta,
            r.a,
            r.e_norm_sq,
            r.consensus_sq,
            r.drift_sq,
            r.ifo_total,
            r.comm_rounds
        );
    }
    out
}

/// Resolved per-iteration schedule table (t, w_t, η_t, a_t) for audit.
/// Row t's momentum entry is the weight that formed d_t (a₁ is the plain
/// initial batch, reported as 1).
pub fn schedule_table(s: &ScheduleState) -> String {
    let mut out = String::new();
    out.push_str("t,w,eta,a\n");
    for t in 0..=s.total_iters {
        let a = match t {
            0 => String::new(),
            1 => "1".to_string(),
            _ => format!("{}", s.momentum_at(t - 1)),
        };
        let _ = writeln!(out, "{},{},{},{}", t, s.weight_at(t), s.eta_at(t), a);
    }
    out
}

/// Aggregate statistics for one ε target within one sweep cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellStat {
    pub eps: f64,
    /// Seeds that reached the target.
    pub attained: usize,
    pub mean_rounds: Option<f64>,
    pub stderr_rounds: Option<f64>,
    pub mean_ifo: Option<f64>,
    pub stderr_ifo: Option<f64>,
}

/// One grid cell of a trade-off sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub nu: f64,
    pub local_updates: u64,
    pub batch: u64,
    pub echo: Option<ResolvedEcho>,
    pub stats: Vec<CellStat>,
    pub per_seed: Vec<RunSummary>,
    /// Failure note when the cell could not run; the sweep continues.
    pub error: Option<String>,
}

/// Trade-off sweep over a ν grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

fn mean_stderr(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

fn run_cell(config: &ExperimentConfig, nu: f64) -> SweepCell {
    let mut cell_cfg = config.clone();
    cell_cfg.schedule.nu = Some(nu);
    cell_cfg.schedule.local_updates = None;
    cell_cfg.schedule.batch = None;
    cell_cfg.schedule.init_batch = None;
    cell_cfg.out_dir = None;

    let resolved = match resolve(&cell_cfg) {
        Ok(r) => r,
        Err(e) => {
            return SweepCell {
                nu,
                local_updates: 0,
                batch: 0,
                echo: None,
                stats: Vec::new(),
                per_seed: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    };

    let mut per_seed = Vec::new();
    for &seed in &cell_cfg.seeds {
        match resolved.run(seed) {
            Ok(record) => per_seed.push(summarize(&record, &cell_cfg.eps_targets, seed)),
            Err(e) => {
                return SweepCell {
                    nu,
                    local_updates: resolved.echo.local_updates,
                    batch: resolved.echo.batch,
                    echo: Some(resolved.echo),
                    stats: Vec::new(),
                    per_seed,
                    error: Some(e.to_string()),
                }
            }
        }
    }

    let stats = cell_cfg
        .eps_targets
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let rounds: Vec<f64> = per_seed
                .iter()
                .filter_map(|s| s.eps[i].rounds.map(|r| r as f64))
                .collect();
            let ifo: Vec<f64> = per_seed
                .iter()
                .filter_map(|s| s.eps[i].ifo.map(|r| r as f64))
                .collect();
            let (mean_rounds, stderr_rounds) = mean_stderr(&rounds);
            let (mean_ifo, stderr_ifo) = mean_stderr(&ifo);
            CellStat {
                eps,
                attained: rounds.len(),
                mean_rounds,
                stderr_rounds,
                mean_ifo,
                stderr_ifo,
            }
        })
        .collect();

    SweepCell {
        nu,
        local_updates: resolved.echo.local_updates,
        batch: resolved.echo.batch,
        echo: Some(resolved.echo),
        stats,
        per_seed,
        error: None,
    }
}

/// Run the trade-off sweep: each ν derives its (I, b) from the algorithm's
/// map, runs every seed to T, and aggregates rounds- and IFO-to-ε.
/// Cells execute concurrently; per-seed runs inside a cell stay sequential.
pub fn sweep_tradeoff(config: &ExperimentConfig, nu_grid: &[f64]) -> Result<SweepResult> {
    config.validate()?;
    if nu_grid.is_empty() {
        return Err(Error::Config("empty nu grid".into()));
    }
    if nu_grid.iter().any(|nu| !(0.0..=1.0).contains(nu)) {
        return Err(Error::Config("nu grid values must lie in [0, 1]".into()));
    }
    if config.eps_targets.is_empty() {
        return Err(Error::Config("sweep needs at least one eps target".into()));
    }
    let cells: Vec<SweepCell> = nu_grid.par_iter().map(|&nu| run_cell(config, nu)).collect();

    if let Some(dir) = &config.out_dir {
        let cell_dir = dir.join("cells");
        std::fs::create_dir_all(&cell_dir)?;
        for (i, cell) in cells.iter().enumerate() {
            let path = cell_dir.join(format!("cell_{i:03}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(cell)?)?;
        }
        let index = sweep_csv(&SweepResult {
            cells: cells.clone(),
        });
        std::fs::write(dir.join("sweep.csv"), index)?;
    }
    Ok(SweepResult { cells })
}

/// Render the sweep index CSV.
pub fn sweep_csv(result: &SweepResult) -> String {
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::new();
    out.push_str("nu,I,b,eps,mean_rounds,stderr_rounds,mean_ifo,stderr_ifo,seeds\n");
    for cell in &result.cells {
        for s in &cell.stats {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                cell.nu,
                cell.local_updates,
                cell.batch,
                s.eps,
                fmt_opt(s.mean_rounds),
                fmt_opt(s.stderr_rounds),
                fmt_opt(s.mean_ifo),
                fmt_opt(s.stderr_ifo),
                s.attained
            );
        }
    }
    out
}

/// Least-squares slope of log(cost) against log(1/ε), with the fit's r².
///
/// Needs at least three distinct attained ε values. Rescaling every cost by
/// a positive constant leaves the slope unchanged.
pub fn fit_complexity(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let clean: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(e, c)| e > 0.0 && c > 0.0 && e.is_finite() && c.is_finite())
        .collect();
    let mut eps_seen: Vec<f64> = clean.iter().map(|&(e, _)| e).collect();
    eps_seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps_seen.dedup();
    if eps_seen.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 distinct attained eps values, got {}",
            eps_seen.len()
        )));
    }
    let xs: Vec<f64> = clean.iter().map(|&(e, _)| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = clean.iter().map(|&(_, c)| c.ln()).collect();
    let n = xs.len() as f64;
    let x_bar = xs.iter().sum::<f64>() / n;
    let y_bar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_bar) * (y - y_bar))
        .sum();
    let syy: f64 = ys.iter().map(|y| (y - y_bar) * (y - y_bar)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit(
            "eps values are not distinct enough to fit".into(),
        ));
    }
    let slope = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let pred = y_bar + slope * (x - x_bar);
            (y - pred) * (y - pred)
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok((slope, r2))
}

/// Write a string to a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ProblemConfig, ScheduleConfig};
    use crate::problems::Family;
    use proptest::prelude::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemConfig {
                family: Family::LogisticNonconvex,
                dim: 4,
                workers: 2,
                n_per_worker: 16,
                seed: 3,
                hetero_shift: 0.0,
                noise: 0.0,
                class_skew: 0.5,
                reg_lambda: 0.02,
                hidden: None,
            },
            algorithm: Algorithm::Stem,
            schedule: ScheduleConfig {
                mode: ScheduleMode::Practical,
                total_iters: 40,
                nu: None,
                local_updates: Some(4),
                batch: Some(2),
                init_batch: None,
                eta: None,
                kappa: 0.2,
                kappa_bk_scaling: false,
                kappa_max: None,
                cbar: 2.0,
                epoch_len: 1,
                sigma: None,
                l_smooth: None,
                force_a: None,
                batch_mode: BatchMode::Sampled,
            },
            eps_targets: vec![0.5, 0.1],
            seeds: vec![1, 2],
            threads: 1,
            x0: None,
            out_dir: None,
        }
    }

    #[test]
    fn explicit_overrides_beat_nu() {
        let mut cfg = base_config();
        cfg.schedule.nu = Some(0.0);
        cfg.schedule.local_updates = Some(5);
        cfg.schedule.batch = Some(3);
        let r = resolve(&cfg).unwrap();
        assert_eq!(r.echo.local_updates, 5);
        assert_eq!(r.echo.batch, 3);
    }

    #[test]
    fn horizon_is_padded_to_round_multiple() {
        let mut cfg = base_config();
        cfg.schedule.total_iters = 41;
        let r = resolve(&cfg).unwrap();
        assert_eq!(r.echo.total_iters, 44);
        assert_eq!(r.echo.padded_from, Some(41));
    }

    #[test]
    fn minibatch_sgd_is_stem_alias() {
        let mut a = base_config();
        a.algorithm = Algorithm::MinibatchSgd;
        a.seeds = vec![9];
        let mut b = base_config();
        b.algorithm = Algorithm::Stem;
        b.schedule.local_updates = Some(1);
        b.schedule.force_a = Some(1.0);
        b.seeds = vec![9];
        let out_a = run_experiment(&a).unwrap();
        let out_b = run_experiment(&b).unwrap();
        let (ra, rb) = (&out_a.runs[0].1, &out_b.runs[0].1);
        assert_eq!(run_csv(ra), run_csv(rb));
        assert_eq!(ra.output_iterate, rb.output_iterate);
    }

    #[test]
    fn theoretical_mode_measures_constants() {
        let mut cfg = base_config();
        cfg.problem.noise = 0.1;
        cfg.problem.family = Family::LeastSquaresSharedDesign;
        cfg.problem.class_skew = 0.0;
        cfg.schedule.mode = ScheduleMode::Theoretical;
        let r = resolve(&cfg).unwrap();
        assert_eq!(r.echo.mode, Some(ScheduleMode::Theoretical));
        assert!(r.echo.sigma.unwrap() > 0.0);
        assert!(r.echo.l_smooth.unwrap() > 0.0);
    }

    #[test]
    fn sigma_zero_theoretical_falls_back_to_practical() {
        let mut cfg = base_config();
        cfg.problem.family = Family::LeastSquaresSharedDesign;
        cfg.problem.noise = 0.0; // deterministic targets, but n > 1 keeps σ > 0
        cfg.problem.n_per_worker = 1; // single sample per worker forces σ = 0
        cfg.schedule.mode = ScheduleMode::Theoretical;
        cfg.schedule.local_updates = Some(1);
        cfg.schedule.batch = Some(1);
        let r = resolve(&cfg).unwrap();
        assert_eq!(r.echo.mode, Some(ScheduleMode::Practical));
        assert!(r.echo.warnings.iter().any(|w| w.contains("sigma")));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = base_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(run_csv(&a.runs[0].1), run_csv(&b.runs[0].1));
    }

    #[test]
    fn unreachable_eps_is_absent_not_an_error() {
        let mut cfg = base_config();
        cfg.eps_targets = vec![1e-30];
        cfg.seeds = vec![1];
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.runs[0].2.eps[0].rounds, None);
        assert_eq!(out.runs[0].2.eps[0].ifo, None);
    }

    #[test]
    fn sweep_shapes_and_echo() {
        let mut cfg = base_config();
        cfg.schedule.local_updates = None;
        cfg.schedule.batch = None;
        cfg.schedule.total_iters = 64;
        cfg.problem.workers = 2;
        cfg.eps_targets = vec![0.5];
        cfg.seeds = vec![1];
        let sweep = sweep_tradeoff(&cfg, &[0.0, 1.0]).unwrap();
        assert_eq!(sweep.cells.len(), 2);
        for cell in &sweep.cells {
            assert!(cell.error.is_none(), "{:?}", cell.error);
            assert_eq!(cell.stats.len(), 1);
            let echo = cell.echo.as_ref().unwrap();
            assert_eq!(echo.local_updates, cell.local_updates);
            // Single-seed sweeps have no stderr.
            assert!(cell.stats[0].stderr_rounds.is_none());
        }
        // ν = 0 maximizes b; ν = 1 maximizes I (T/K² = 16 → (1,4) and (2,1)).
        assert_eq!((sweep.cells[0].local_updates, sweep.cells[0].batch), (1, 4));
        assert_eq!((sweep.cells[1].local_updates, sweep.cells[1].batch), (2, 1));
    }

    #[test]
    fn failed_cells_are_recorded_and_the_sweep_continues() {
        let mut cfg = base_config();
        cfg.schedule.local_updates = None;
        cfg.schedule.batch = None;
        cfg.schedule.total_iters = 64;
        cfg.eps_targets = vec![0.5];
        cfg.seeds = vec![1];
        // A problem the builder rejects (tanh family without a width) fails
        // every cell's resolution but must not abort the sweep call.
        cfg.problem.family = Family::TwoLayerTanh;
        cfg.problem.hidden = None;
        let sweep = sweep_tradeoff(&cfg, &[0.0, 1.0]).unwrap();
        assert_eq!(sweep.cells.len(), 2);
        for cell in &sweep.cells {
            assert!(cell.error.as_ref().unwrap().contains("hidden"));
        }
    }

    #[test]
    fn sweep_cells_do_not_depend_on_grid_order() {
        let mut cfg = base_config();
        cfg.schedule.local_updates = None;
        cfg.schedule.batch = None;
        cfg.schedule.total_iters = 64;
        cfg.eps_targets = vec![0.5];
        cfg.seeds = vec![1, 2];
        let fwd = sweep_tradeoff(&cfg, &[0.0, 1.0]).unwrap();
        let rev = sweep_tradeoff(&cfg, &[1.0, 0.0]).unwrap();
        let key = |c: &SweepCell| {
            (
                c.local_updates,
                c.batch,
                c.stats[0].mean_rounds.map(f64::to_bits),
                c.stats[0].mean_ifo.map(f64::to_bits),
            )
        };
        assert_eq!(key(&fwd.cells[0]), key(&rev.cells[1]));
        assert_eq!(key(&fwd.cells[1]), key(&rev.cells[0]));
    }

    #[test]
    fn fedavg_short_horizon_warns_when_l_known() {
        let mut cfg = base_config();
        cfg.algorithm = Algorithm::FedAvg;
        cfg.schedule.l_smooth = Some(2.0);
        cfg.schedule.local_updates = Some(2);
        cfg.schedule.batch = Some(2);
        cfg.schedule.total_iters = 16; // far below 81·L²·I²·b·K
        let r = resolve(&cfg).unwrap();
        assert!(r
            .echo
            .warnings
            .iter()
            .any(|w| w.contains("guarantee floor")));
    }

    #[test]
    fn fit_complexity_exact_power_laws() {
        let pts: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3].iter().map(|&e| (e, 100.0 / e)).collect();
        let (slope, r2) = fit_complexity(&pts).unwrap();
        assert!((slope - 1.0).abs() < 1e-9);
        assert!((r2 - 1.0).abs() < 1e-12);

        let pts: Vec<(f64, f64)> = [1e-1_f64, 3e-2, 1e-2, 3e-3]
            .iter()
            .map(|&e| (e, 5.0 / e.powf(1.5)))
            .collect();
        let (slope, _) = fit_complexity(&pts).unwrap();
        assert!((slope - 1.5).abs() < 1e-9);

        assert!(matches!(
            fit_complexity(&[(1e-1, 10.0), (1e-2, 100.0)]),
            Err(Error::Fit(_))
        ));
    }

    proptest! {
        #[test]
        fn fit_is_scale_invariant(scale in 1e-3f64..1e3) {
            let base: Vec<(f64, f64)> = vec![(1e-1, 7.0), (1e-2, 55.0), (1e-3, 410.0)];
            let scaled: Vec<(f64, f64)> = base.iter().map(|&(e, c)| (e, c * scale)).collect();
            let (s1, _) = fit_complexity(&base).unwrap();
            let (s2, _) = fit_complexity(&scaled).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
        }
    }
}
