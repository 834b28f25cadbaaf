//! Command-line front end: single runs, ν sweeps, complexity fits and
//! schedule dumps, all driven by one JSON config plus flag overrides.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use stemsim::config::{Algorithm, ExperimentConfig};
use stemsim::error::Error;
use stemsim::experiment::{
    fit_complexity, resolve, run_experiment, schedule_table, sweep_csv, sweep_tradeoff,
    ResolvedAlgo,
};
use stemsim::schedules::ScheduleMode;

#[derive(Parser)]
#[command(
    name = "stemsim",
    version,
    about = "Federated nonconvex optimization simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute the configured runs and write per-seed CSV + JSON outputs.
    Run(RunArgs),
    /// Sweep the (I, b) trade-off dial ν and write the index CSV.
    Sweep(SweepArgs),
    /// Fit a complexity exponent from (ε, cost) points.
    Fit(FitArgs),
    /// Export the resolved schedule as CSV rows (t, w, eta, a).
    ScheduleDump(DumpArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Algorithm: stem | fedavg | minibatch-sgd.
    #[arg(long)]
    algo: Option<String>,
    /// Trade-off dial in [0, 1]; clears explicit local_updates/batch.
    #[arg(long)]
    nu: Option<f64>,
    /// Total iterations.
    #[arg(long = "T")]
    total_iters: Option<u64>,
    /// Worker count.
    #[arg(long = "K")]
    workers: Option<u64>,
    /// Minibatch size.
    #[arg(long = "b")]
    batch: Option<u64>,
    /// Local updates per round.
    #[arg(long = "I")]
    local_updates: Option<u64>,
    /// Schedule mode: theoretical | practical.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated ε targets, e.g. "1e-2,3e-3,1e-3".
    #[arg(long)]
    eps: Option<String>,
    /// Worker-update threads (any value gives identical outputs).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated ν grid.
    #[arg(long = "nu-grid", default_value = "0,0.25,0.5,0.75,1")]
    nu_grid: String,
}

#[derive(Args)]
struct FitArgs {
    /// Inline points "eps:cost,eps:cost,...".
    #[arg(long)]
    points: Option<String>,
    /// Sweep index CSV to read points from.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Restrict CSV rows to this ν value.
    #[arg(long)]
    nu: Option<f64>,
    /// Cost column when reading a CSV: rounds | ifo.
    #[arg(long, default_value = "rounds")]
    cost: String,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    overrides: Overrides,
}

fn fail(err: &Error) -> ExitCode {
    let (kind, code) = match err {
        Error::Config(_) | Error::Usage(_) | Error::Serde(_) | Error::DegenerateSchedule(_) => {
            ("config", 2)
        }
        _ => ("runtime", 1),
    };
    let payload = serde_json::json!({
        "error": kind,
        "message": err.to_string(),
    });
    eprintln!("{payload}");
    ExitCode::from(code)
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse number `{s}`")))
        })
        .collect()
}

fn load_config(ov: &Overrides) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&ov.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", ov.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;

    if let Some(seed) = ov.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(algo) = &ov.algo {
        cfg.algorithm = match algo.as_str() {
            "stem" => Algorithm::Stem,
            "fedavg" => Algorithm::FedAvg,
            "minibatch-sgd" => Algorithm::MinibatchSgd,
            other => return Err(Error::Config(format!("unknown algorithm `{other}`"))),
        };
    }
    if let Some(nu) = ov.nu {
        cfg.schedule.nu = Some(nu);
        cfg.schedule.local_updates = None;
        cfg.schedule.batch = None;
    }
    if let Some(t) = ov.total_iters {
        cfg.schedule.total_iters = t;
    }
    if let Some(k) = ov.workers {
        cfg.problem.workers = k as usize;
    }
    if let Some(b) = ov.batch {
        cfg.schedule.batch = Some(b);
    }
    if let Some(i) = ov.local_updates {
        cfg.schedule.local_updates = Some(i);
    }
    if let Some(mode) = &ov.mode {
        cfg.schedule.mode = match mode.as_str() {
            "theoretical" => ScheduleMode::Theoretical,
            "practical" => ScheduleMode::Practical,
            other => return Err(Error::Config(format!("unknown schedule mode `{other}`"))),
        };
    }
    if let Some(out) = &ov.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(eps) = &ov.eps {
        cfg.eps_targets = parse_f64_list(eps)?;
    }
    if let Some(threads) = ov.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let cfg = load_config(&args.overrides)?;
    let out = run_experiment(&cfg)?;
    for (seed, _, summary) in &out.runs {
        let eps_desc: Vec<String> = summary
            .eps
            .iter()
            .map(|e| match e.rounds {
                Some(r) => format!("eps={} rounds={} ifo={}", e.eps, r, e.ifo.unwrap()),
                None => format!("eps={} unreached", e.eps),
            })
            .collect();
        println!(
            "seed {seed}: final loss {:.6} grad^2 {:.3e} ifo {} rounds {}{}{}",
            summary.final_loss,
            summary.final_grad_norm_sq,
            summary.ifo_total,
            summary.comm_rounds,
            if eps_desc.is_empty() { "" } else { " | " },
            eps_desc.join("; ")
        );
    }
    match &cfg.out_dir {
        Some(dir) => println!("wrote per-seed CSV/JSON under {}", dir.display()),
        None => {
            let summaries: Vec<_> = out.runs.iter().map(|(_, _, s)| s).collect();
            let payload = serde_json::json!({
                "resolved": out.echo,
                "summaries": summaries,
            });
            println!("{}", serde_json::to_string_pretty(&payload)?);
        }
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let cfg = load_config(&args.overrides)?;
    let grid = parse_f64_list(&args.nu_grid)?;
    let result = sweep_tradeoff(&cfg, &grid)?;
    print!("{}", sweep_csv(&result));
    if let Some(dir) = &cfg.out_dir {
        println!(
            "# sweep index and per-cell JSON written under {}",
            dir.display()
        );
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    let mut points: Vec<(f64, f64)> = Vec::new();
    if let Some(text) = &args.points {
        for pair in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (e, c) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected eps:cost, got `{pair}`")))?;
            let eps: f64 = e
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse eps `{e}`")))?;
            let cost: f64 = c
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse cost `{c}`")))?;
            points.push((eps, cost));
        }
    } else if let Some(path) = &args.csv {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cost_col = match args.cost.as_str() {
            "rounds" => 4,
            "ifo" => 6,
            other => return Err(Error::Config(format!("unknown cost column `{other}`"))),
        };
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 9 {
                continue;
            }
            let nu: f64 = cols[0].parse().unwrap_or(f64::NAN);
            if let Some(want) = args.nu {
                if (nu - want).abs() > 1e-12 {
                    continue;
                }
            }
            let eps: f64 = match cols[3].parse() {
                Ok(v) => v,
                Err(_) => continue,
            };
            if let Ok(cost) = cols[cost_col].parse::<f64>() {
                points.push((eps, cost));
            }
        }
    } else {
        return Err(Error::Config("fit needs either --points or --csv".into()));
    }
    let (exponent, r2) = fit_complexity(&points)?;
    println!("{}", serde_json::json!({ "exponent": exponent, "r2": r2 }));
    Ok(())
}

fn cmd_schedule_dump(args: &DumpArgs) -> Result<(), Error> {
    let cfg = load_config(&args.overrides)?;
    let resolved = resolve(&cfg)?;
    let table = match &resolved.algo {
        ResolvedAlgo::Stem(s) => schedule_table(s),
        ResolvedAlgo::FedAvg(_) => {
            return Err(Error::Config(
                "schedule-dump applies to the STEM schedule; FedAvg uses a constant step".into(),
            ))
        }
    };
    match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("schedule.csv");
            std::fs::write(&path, table)?;
            println!("wrote {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Fit(args) => cmd_fit(args),
        Cmd::ScheduleDump(args) => cmd_schedule_dump(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
