//! Statistical and distributional properties of the training loops that go
//! beyond per-operation unit checks.

use stemsim::engine::{run_stem, select_output, RunOpts};
use stemsim::problems::{make_logistic_nonconvex, measure_profile};
use stemsim::rng::DetRng;
use stemsim::schedules::theoretical_schedule;

/// The recursive momentum direction must track the mean gradient strictly
/// better than the plain minibatch direction at the same IFO budget.
#[test]
fn momentum_direction_reduces_tracking_error_vs_plain_gradient() {
    let p = make_logistic_nonconvex(8, 4, 24, 0.6, 0.02, 5).unwrap();
    let mut rng = DetRng::from_key(1, 0x70726f70, 0, 0);
    let probes: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..8).map(|_| 0.5 * rng.normal()).collect())
        .collect();
    let pairs: Vec<(usize, usize)> = (0..4).map(|i| (i, i + 1)).collect();
    let prof = measure_profile(&p, &probes, &pairs).unwrap();

    let sched = theoretical_schedule(prof.sigma, prof.l_hat, 2, 4, 2, 256).unwrap();
    let plain = sched.clone().with_a_override(1.0);

    let seeds: Vec<u64> = (1..=20).collect();
    let final_e = |s: &stemsim::schedules::ScheduleState| -> f64 {
        let mut total = 0.0;
        for &seed in &seeds {
            let rec = run_stem(&p, s, &RunOpts::default(), seed).unwrap();
            total += rec.rows.last().unwrap().e_norm_sq;
        }
        total / seeds.len() as f64
    };
    let e_momentum = final_e(&sched);
    let e_plain = final_e(&plain);
    // Identical batch sizes and horizons mean identical IFO budgets.
    assert!(
        e_momentum < e_plain,
        "mean |e_T|^2 with momentum {e_momentum:.3e} not below plain {e_plain:.3e}"
    );
}

/// The output iterate is drawn uniformly: over 10^5 seeds on a length-4
/// trajectory every index lands within 1% of 1/4.
#[test]
fn output_selection_is_uniform_over_seeds() {
    let trajectory: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
    let mut counts = [0u64; 4];
    let draws = 100_000u64;
    for seed in 0..draws {
        let (idx, picked) = select_output(&trajectory, seed).unwrap();
        assert_eq!(picked, trajectory[(idx - 1) as usize]);
        counts[(idx - 1) as usize] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        let freq = c as f64 / draws as f64;
        assert!(
            (freq - 0.25).abs() <= 0.0025,
            "index {i} frequency {freq} deviates more than 1% from 0.25"
        );
    }
}
